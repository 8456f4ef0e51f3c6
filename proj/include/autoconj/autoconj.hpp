#pragma once

#include "autoconj/errors.hpp"
#include "autoconj/random.hpp"
#include "autoconj/likelihoods.hpp"
#include "autoconj/kernels.hpp"
#include "autoconj/augmentation.hpp"
#include "autoconj/quadrature.hpp"
#include "autoconj/gaussian.hpp"
#include "autoconj/cavi.hpp"
#include "autoconj/svgp.hpp"
#include "autoconj/gibbs.hpp"
#include "autoconj/diagnostics.hpp"
#include "autoconj/predict.hpp"
#include "autoconj/dataio.hpp"
