#pragma once

#include "crossvit/analysis.hpp"
#include "crossvit/checkpoint.hpp"
#include "crossvit/config.hpp"
#include "crossvit/data.hpp"
#include "crossvit/fusion.hpp"
#include "crossvit/gradcheck.hpp"
#include "crossvit/instrument.hpp"
#include "crossvit/interp.hpp"
#include "crossvit/model.hpp"
#include "crossvit/ops.hpp"
#include "crossvit/rng.hpp"
#include "crossvit/tensor.hpp"
#include "crossvit/train.hpp"
#include "crossvit/vit.hpp"
