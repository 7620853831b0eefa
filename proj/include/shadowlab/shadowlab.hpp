#pragma once

#include "shadowlab/errors.hpp"
#include "shadowlab/flow.hpp"
#include "shadowlab/pseudo_orbit.hpp"
#include "shadowlab/poincare.hpp"
#include "shadowlab/shadowing.hpp"
#include "shadowlab/splitting.hpp"
#include "shadowlab/chain_graph.hpp"
#include "shadowlab/scenarios.hpp"
#include "shadowlab/config.hpp"
#include "shadowlab/experiment.hpp"
