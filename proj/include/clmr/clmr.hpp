#pragma once

#include "clmr/checkpoint.hpp"
#include "clmr/corpus.hpp"
#include "clmr/error.hpp"
#include "clmr/evaluation.hpp"
#include "clmr/harness.hpp"
#include "clmr/lm.hpp"
#include "clmr/rescore.hpp"
#include "clmr/scoring.hpp"
#include "clmr/stats.hpp"
#include "clmr/svg.hpp"
#include "clmr/tensor.hpp"
