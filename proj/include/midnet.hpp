// Umbrella header for the whole library.

#pragma once

#include "midnet/autograd.hpp"
#include "midnet/checkpoint.hpp"
#include "midnet/config.hpp"
#include "midnet/conv.hpp"
#include "midnet/datasets.hpp"
#include "midnet/eval.hpp"
#include "midnet/layers.hpp"
#include "midnet/losses.hpp"
#include "midnet/mine.hpp"
#include "midnet/model.hpp"
#include "midnet/norm.hpp"
#include "midnet/optim.hpp"
#include "midnet/params.hpp"
#include "midnet/prepare.hpp"
#include "midnet/rng.hpp"
#include "midnet/tensor.hpp"
#include "midnet/trainer.hpp"
