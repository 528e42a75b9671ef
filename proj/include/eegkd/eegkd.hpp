#pragma once

#include "eegkd/bench.hpp"
#include "eegkd/checkpoint.hpp"
#include "eegkd/common.hpp"
#include "eegkd/conv.hpp"
#include "eegkd/data.hpp"
#include "eegkd/gradcheck.hpp"
#include "eegkd/model.hpp"
#include "eegkd/norm.hpp"
#include "eegkd/ops.hpp"
#include "eegkd/tensor.hpp"
#include "eegkd/train.hpp"
