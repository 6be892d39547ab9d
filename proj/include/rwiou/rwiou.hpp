#pragma once

#include "rwiou/assign.hpp"
#include "rwiou/audit.hpp"
#include "rwiou/box.hpp"
#include "rwiou/fit.hpp"
#include "rwiou/geometry.hpp"
#include "rwiou/grad.hpp"
#include "rwiou/grid.hpp"
#include "rwiou/loss.hpp"
#include "rwiou/reduce.hpp"
#include "rwiou/rng.hpp"
#include "rwiou/sample_loss.hpp"
