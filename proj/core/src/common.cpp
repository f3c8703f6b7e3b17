#include "mixlab/common.hpp"

namespace mixlab {

size_t MixMask::count() const {
  size_t n = 0;
  for (auto b : bits) n += b ? 1 : 0;
  return n;
}

MixMask MixMask::inverted() const {
  MixMask m = *this;
  for (auto& b : m.bits) b = b ? 0 : 1;
  return m;
}

}  // namespace mixlab
