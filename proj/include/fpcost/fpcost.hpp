#pragma once

// Umbrella header.

#include "drift.hpp"
#include "entropic_step.hpp"
#include "fokker_planck.hpp"
#include "gaussian.hpp"
#include "io.hpp"
#include "ladder.hpp"
#include "oracle.hpp"
#include "path_cost.hpp"
#include "scenarios.hpp"
#include "torus.hpp"
#include "transport.hpp"
