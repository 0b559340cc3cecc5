#pragma once

#include "deepisp/adam.hpp"
#include "deepisp/checkpoint.hpp"
#include "deepisp/color.hpp"
#include "deepisp/data.hpp"
#include "deepisp/gradcheck.hpp"
#include "deepisp/gradcheck_suite.hpp"
#include "deepisp/image_io.hpp"
#include "deepisp/loss.hpp"
#include "deepisp/metrics.hpp"
#include "deepisp/model.hpp"
#include "deepisp/ops.hpp"
#include "deepisp/rng.hpp"
#include "deepisp/tape.hpp"
#include "deepisp/tensor.hpp"
#include "deepisp/train.hpp"
