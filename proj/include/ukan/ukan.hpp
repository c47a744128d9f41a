#pragma once

// Everything: tensors and autodiff, KAN layers, the U-KAN model, diffusion,
// data pipeline, metrics, optimizer, configuration, checkpoints and trainer.

#include "ukan/checkpoint.hpp"
#include "ukan/config.hpp"
#include "ukan/data.hpp"
#include "ukan/diffusion.hpp"
#include "ukan/grad_check.hpp"
#include "ukan/kan.hpp"
#include "ukan/layers.hpp"
#include "ukan/losses.hpp"
#include "ukan/metrics.hpp"
#include "ukan/model.hpp"
#include "ukan/module.hpp"
#include "ukan/nn_ops.hpp"
#include "ukan/ops.hpp"
#include "ukan/optim.hpp"
#include "ukan/runtime.hpp"
#include "ukan/spline.hpp"
#include "ukan/tensor.hpp"
#include "ukan/trainer.hpp"
