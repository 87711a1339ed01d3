#pragma once

#include "atres/conv.hpp"
#include "atres/error.hpp"
#include "atres/gradcheck.hpp"
#include "atres/layers.hpp"
#include "atres/loss.hpp"
#include "atres/metrics.hpp"
#include "atres/model.hpp"
#include "atres/ops.hpp"
#include "atres/patch.hpp"
#include "atres/random.hpp"
#include "atres/stitch.hpp"
#include "atres/synth.hpp"
#include "atres/tensor.hpp"
#include "atres/training.hpp"
#include "atres/io/checkpoint.hpp"
#include "atres/io/config.hpp"
#include "atres/io/dataset.hpp"
#include "atres/io/log.hpp"
#include "atres/io/png.hpp"
