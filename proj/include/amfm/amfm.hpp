#pragma once

#include "amfm/core/errors.hpp"
#include "amfm/core/gradcheck.hpp"
#include "amfm/core/layers.hpp"
#include "amfm/core/param.hpp"
#include "amfm/core/tensor.hpp"
#include "amfm/block/amfm_block.hpp"
#include "amfm/block/attention.hpp"
#include "amfm/multitask/head.hpp"
#include "amfm/multitask/objectives.hpp"
#include "amfm/multitask/taxonomy.hpp"
#include "amfm/frontend/augment.hpp"
#include "amfm/frontend/dataset.hpp"
#include "amfm/frontend/spectrogram.hpp"
#include "amfm/frontend/synth.hpp"
#include "amfm/frontend/wav.hpp"
#include "amfm/trainer/checkpoint.hpp"
#include "amfm/trainer/config.hpp"
#include "amfm/trainer/evaluate.hpp"
#include "amfm/trainer/featmap.hpp"
#include "amfm/trainer/model.hpp"
#include "amfm/trainer/optim.hpp"
#include "amfm/trainer/train.hpp"
#include "amfm/verify/gradient_suite.hpp"
