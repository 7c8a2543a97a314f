#pragma once

#include "mtr/core.hpp"
#include "mtr/detection.hpp"
#include "mtr/environments.hpp"
#include "mtr/experiment.hpp"
#include "mtr/harness.hpp"
#include "mtr/io.hpp"
#include "mtr/learners.hpp"
#include "mtr/monitor.hpp"
#include "mtr/rng.hpp"
#include "mtr/trust.hpp"
