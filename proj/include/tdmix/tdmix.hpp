#pragma once

#include "tdmix/attention.hpp"
#include "tdmix/autodiff.hpp"
#include "tdmix/common.hpp"
#include "tdmix/config.hpp"
#include "tdmix/eval.hpp"
#include "tdmix/formats.hpp"
#include "tdmix/image_io.hpp"
#include "tdmix/label_mix.hpp"
#include "tdmix/losses.hpp"
#include "tdmix/mixers.hpp"
#include "tdmix/region_mix.hpp"
#include "tdmix/rng.hpp"
#include "tdmix/synthetic.hpp"
#include "tdmix/tensor.hpp"
#include "tdmix/train.hpp"
#include "tdmix/vit.hpp"
