#pragma once

#include "mtsgl/error.hpp"
#include "mtsgl/features.hpp"
#include "mtsgl/geometry.hpp"
#include "mtsgl/image.hpp"
#include "mtsgl/imageops.hpp"
#include "mtsgl/losses.hpp"
#include "mtsgl/metrics.hpp"
#include "mtsgl/model.hpp"
#include "mtsgl/ops.hpp"
#include "mtsgl/optim.hpp"
#include "mtsgl/pareto.hpp"
#include "mtsgl/plot.hpp"
#include "mtsgl/protocol.hpp"
#include "mtsgl/rng.hpp"
#include "mtsgl/synthdata.hpp"
#include "mtsgl/tensor.hpp"
#include "mtsgl/train.hpp"
