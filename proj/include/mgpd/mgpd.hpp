#pragma once

#include "mgpd/censoring.hpp"
#include "mgpd/core.hpp"
#include "mgpd/density.hpp"
#include "mgpd/diagnostics.hpp"
#include "mgpd/fit.hpp"
#include "mgpd/generators.hpp"
#include "mgpd/ingest.hpp"
#include "mgpd/model.hpp"
#include "mgpd/pipeline.hpp"
#include "mgpd/risk.hpp"
#include "mgpd/simulate.hpp"

namespace mgpd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mgpd
