#pragma once

#include "msan/attention.hpp"
#include "msan/autodiff.hpp"
#include "msan/checkpoint.hpp"
#include "msan/config.hpp"
#include "msan/error.hpp"
#include "msan/kernels.hpp"
#include "msan/metrics.hpp"
#include "msan/model.hpp"
#include "msan/multiscale.hpp"
#include "msan/multiview.hpp"
#include "msan/mvol.hpp"
#include "msan/optim.hpp"
#include "msan/params.hpp"
#include "msan/phantom.hpp"
#include "msan/pipeline.hpp"
#include "msan/preprocess.hpp"
#include "msan/tensor.hpp"
#include "msan/train.hpp"
#include "msan/volume.hpp"
