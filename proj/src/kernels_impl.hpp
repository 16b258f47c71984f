#pragma once

#include "casciff/kernels.hpp"

namespace casciff::kernels {

// Variant providers; each returns nullptr when not compiled in or when the
// running CPU lacks the required ISA.
const Ops* avx2_ops();
const Ops* neon_ops();

}  // namespace casciff::kernels
