#pragma once

#include "drbert/autodiff.hpp"
#include "drbert/checkpoint.hpp"
#include "drbert/dataset.hpp"
#include "drbert/dra.hpp"
#include "drbert/embedding.hpp"
#include "drbert/encoder.hpp"
#include "drbert/error.hpp"
#include "drbert/metrics.hpp"
#include "drbert/model.hpp"
#include "drbert/optim.hpp"
#include "drbert/rng.hpp"
#include "drbert/tensor.hpp"
#include "drbert/train.hpp"
