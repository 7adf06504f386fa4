#pragma once

#include "cen/error.hpp"
#include "cen/evaluation.hpp"
#include "cen/experiment.hpp"
#include "cen/fusion.hpp"
#include "cen/geometry.hpp"
#include "cen/io.hpp"
#include "cen/pipeline.hpp"
#include "cen/stn.hpp"
#include "cen/synthetic.hpp"
#include "cen/tensor.hpp"
#include "cen/transform.hpp"
