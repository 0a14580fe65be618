#pragma once

#include "dataset.hpp"
#include "layers.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "retrieval.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
#include "config.hpp"
#include "pipeline.hpp"
