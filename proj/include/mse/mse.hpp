#pragma once

// Umbrella header: the whole library.

#include "mse/errors.hpp"
#include "mse/diffmath/tensor.hpp"
#include "mse/diffmath/ops.hpp"
#include "mse/diffmath/parameters.hpp"
#include "mse/diffmath/gradcheck.hpp"
#include "mse/io/binary.hpp"
#include "mse/io/checkpoint.hpp"
#include "mse/lm/vocabulary.hpp"
#include "mse/lm/backbone.hpp"
#include "mse/lm/pretrain.hpp"
#include "mse/adapter/config.hpp"
#include "mse/adapter/adapter.hpp"
#include "mse/corpus/feature_file.hpp"
#include "mse/corpus/presets.hpp"
#include "mse/corpus/dataset.hpp"
#include "mse/corpus/synthetic.hpp"
#include "mse/metrics/label_codec.hpp"
#include "mse/metrics/metrics.hpp"
#include "mse/trainer/optimizer.hpp"
#include "mse/trainer/loss.hpp"
#include "mse/trainer/train.hpp"
#include "mse/app/run_config.hpp"
#include "mse/app/gradcheck_suite.hpp"
#include "mse/app/commands.hpp"
