#pragma once

#include "hermit/attention.hpp"
#include "hermit/checkpoint.hpp"
#include "hermit/common.hpp"
#include "hermit/corpus.hpp"
#include "hermit/crf.hpp"
#include "hermit/embedding.hpp"
#include "hermit/evaluation.hpp"
#include "hermit/lstm.hpp"
#include "hermit/model.hpp"
#include "hermit/tensor.hpp"
#include "hermit/training.hpp"
