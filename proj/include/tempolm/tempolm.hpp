#pragma once

// tempolm - temporal masked language modeling toolkit.
// Umbrella header: corpora, vocabulary, time masking, a small transformer
// encoder with exact gradients, training, semantic change detection,
// sentence time prediction, and evaluation metrics.

#include "tempolm/backprop.hpp"
#include "tempolm/checkpoint.hpp"
#include "tempolm/config.hpp"
#include "tempolm/corpus.hpp"
#include "tempolm/manifest.hpp"
#include "tempolm/masking.hpp"
#include "tempolm/metrics.hpp"
#include "tempolm/model.hpp"
#include "tempolm/optimizer.hpp"
#include "tempolm/rng.hpp"
#include "tempolm/tasks.hpp"
#include "tempolm/tensor.hpp"
#include "tempolm/thread_pool.hpp"
#include "tempolm/train.hpp"
#include "tempolm/vocab.hpp"
