#pragma once

#include "scvrl/core.hpp"
#include "scvrl/autograd.hpp"
#include "scvrl/synthdata.hpp"
#include "scvrl/motion.hpp"
#include "scvrl/augment.hpp"
#include "scvrl/model.hpp"
#include "scvrl/objective.hpp"
#include "scvrl/momentum.hpp"
#include "scvrl/trainer.hpp"
#include "scvrl/eval.hpp"
