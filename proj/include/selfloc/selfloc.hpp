#pragma once

#include "selfloc/error.hpp"
#include "selfloc/tensor.hpp"
#include "selfloc/sparse_core.hpp"
#include "selfloc/nn_ops.hpp"
#include "selfloc/gating.hpp"
#include "selfloc/autodiff.hpp"
#include "selfloc/model.hpp"
#include "selfloc/retrieval.hpp"
#include "selfloc/data_io.hpp"
#include "selfloc/parallel.hpp"
#include "selfloc/train.hpp"
#include "selfloc/experiment.hpp"
#include "selfloc/selftest.hpp"

namespace selfloc {
inline constexpr const char* kEngineVersion = "0.3.0";
}
