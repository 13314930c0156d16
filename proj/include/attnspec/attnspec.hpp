#pragma once

#include "attnspec/analysis.hpp"
#include "attnspec/error.hpp"
#include "attnspec/fixtures.hpp"
#include "attnspec/logit_field.hpp"
#include "attnspec/matrix.hpp"
#include "attnspec/render.hpp"
#include "attnspec/selftest.hpp"
#include "attnspec/softmax_bounds.hpp"
#include "attnspec/spectrum_stats.hpp"
#include "attnspec/tensor_io.hpp"
#include "attnspec/weight_spectrum.hpp"
