#pragma once

#include "pacd/core.hpp"
#include "pacd/diffnet.hpp"
#include "pacd/smoothing.hpp"
#include "pacd/training.hpp"
#include "pacd/bilevel.hpp"
#include "pacd/analytic.hpp"
#include "pacd/attack.hpp"
#include "pacd/harness.hpp"
#include "pacd/io.hpp"
