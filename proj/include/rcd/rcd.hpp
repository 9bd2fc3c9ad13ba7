#pragma once

// Recursive counterfactual deconfounding for closed- and open-set
// recognition: umbrella header.

#include "rcd/core.hpp"
#include "rcd/losses.hpp"
#include "rcd/metrics.hpp"
#include "rcd/model.hpp"
#include "rcd/causal.hpp"
#include "rcd/serialize.hpp"
#include "rcd/data.hpp"
#include "rcd/train.hpp"
#include "rcd/recursion.hpp"
#include "rcd/embedding.hpp"
