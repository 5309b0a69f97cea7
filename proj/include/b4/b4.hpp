#pragma once

#include "b4/adam.hpp"
#include "b4/analytics.hpp"
#include "b4/autodiff.hpp"
#include "b4/backtest.hpp"
#include "b4/checkpoint.hpp"
#include "b4/config.hpp"
#include "b4/error.hpp"
#include "b4/ingest.hpp"
#include "b4/loss.hpp"
#include "b4/model.hpp"
#include "b4/pairing.hpp"
#include "b4/pipeline.hpp"
#include "b4/tensor.hpp"
#include "b4/tokenizer.hpp"
#include "b4/train.hpp"
