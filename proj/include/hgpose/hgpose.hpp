#pragma once

#include "hgpose/checkpoint.hpp"
#include "hgpose/data.hpp"
#include "hgpose/error.hpp"
#include "hgpose/evaluation.hpp"
#include "hgpose/geometry.hpp"
#include "hgpose/image.hpp"
#include "hgpose/layers.hpp"
#include "hgpose/loss.hpp"
#include "hgpose/model.hpp"
#include "hgpose/tensor.hpp"
#include "hgpose/training.hpp"
