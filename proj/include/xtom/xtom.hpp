#pragma once

#include "xtom/version.hpp"
#include "xtom/error.hpp"
#include "xtom/rng.hpp"
#include "xtom/aog.hpp"
#include "xtom/performer.hpp"
#include "xtom/task.hpp"
#include "xtom/bubble.hpp"
#include "xtom/simuser.hpp"
#include "xtom/belief.hpp"
#include "xtom/evaluator.hpp"
#include "xtom/policy.hpp"
#include "xtom/engine.hpp"
#include "xtom/experiment.hpp"
#include "xtom/service.hpp"
