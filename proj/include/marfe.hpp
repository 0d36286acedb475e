#pragma once

#include "marfe/rng.hpp"
#include "marfe/errors.hpp"
#include "marfe/mdp.hpp"
#include "marfe/planning.hpp"
#include "marfe/estimate.hpp"
#include "marfe/simulator.hpp"
#include "marfe/algorithm.hpp"
#include "marfe/baselines.hpp"
#include "marfe/keydyn.hpp"
#include "marfe/eval.hpp"
#include "marfe/invariants.hpp"
#include "marfe/io.hpp"
