#pragma once

// Umbrella header.
#include "vlift/errors.hpp"
#include "vlift/kernel.hpp"
#include "vlift/lift.hpp"
#include "vlift/brownian.hpp"
#include "vlift/simulate.hpp"
#include "vlift/control.hpp"
#include "vlift/regression.hpp"
#include "vlift/bsde.hpp"
#include "vlift/hjb.hpp"
#include "vlift/io.hpp"
#include "vlift/config.hpp"
#include "vlift/experiments.hpp"
