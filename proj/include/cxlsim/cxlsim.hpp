#pragma once

// Umbrella header: the whole library in one include.

#include "cxlsim/error.hpp"
#include "cxlsim/topology.hpp"
#include "cxlsim/trace.hpp"
#include "cxlsim/placement.hpp"
#include "cxlsim/timing.hpp"
#include "cxlsim/report.hpp"
