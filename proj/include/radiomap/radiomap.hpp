#pragma once

// Umbrella header: radio map construction from crowdsensed signal-strength
// data with per-sensor location bias calibration.

#include "radiomap/baseline.hpp"
#include "radiomap/calibrate.hpp"
#include "radiomap/config.hpp"
#include "radiomap/csv.hpp"
#include "radiomap/env_model.hpp"
#include "radiomap/experiment.hpp"
#include "radiomap/gp.hpp"
#include "radiomap/linalg.hpp"
#include "radiomap/log.hpp"
#include "radiomap/mobility.hpp"
#include "radiomap/optimize.hpp"
#include "radiomap/rng.hpp"
#include "radiomap/sensing.hpp"
#include "radiomap/vec2.hpp"

namespace radiomap {
inline constexpr const char* kVersion = "0.1.0";
}
