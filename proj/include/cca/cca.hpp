#pragma once

// Umbrella header for the citation content analysis toolkit.

#include "cca/adapters.hpp"
#include "cca/checkpoint.hpp"
#include "cca/classify.hpp"
#include "cca/corpus.hpp"
#include "cca/encoder.hpp"
#include "cca/error.hpp"
#include "cca/evaluate.hpp"
#include "cca/folds.hpp"
#include "cca/manifest.hpp"
#include "cca/metrics.hpp"
#include "cca/optimizer.hpp"
#include "cca/presets.hpp"
#include "cca/pretrain.hpp"
#include "cca/rng.hpp"
#include "cca/synthetic.hpp"
#include "cca/text.hpp"
#include "cca/tokenizer.hpp"
#include "cca/version.hpp"
