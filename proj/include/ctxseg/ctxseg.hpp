#pragma once

#include "ctxseg/bundle.hpp"
#include "ctxseg/cli.hpp"
#include "ctxseg/common.hpp"
#include "ctxseg/config.hpp"
#include "ctxseg/data.hpp"
#include "ctxseg/eval.hpp"
#include "ctxseg/image.hpp"
#include "ctxseg/memory.hpp"
#include "ctxseg/nn.hpp"
#include "ctxseg/pipeline.hpp"
#include "ctxseg/plot.hpp"
#include "ctxseg/png_io.hpp"
#include "ctxseg/sae.hpp"
#include "ctxseg/segnet.hpp"
#include "ctxseg/tensor.hpp"
#include "ctxseg/texture.hpp"
#include "ctxseg/wavelet.hpp"
