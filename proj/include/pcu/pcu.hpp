#pragma once

#include "pcu/adam.hpp"
#include "pcu/assignment.hpp"
#include "pcu/autodiff.hpp"
#include "pcu/checkpoint.hpp"
#include "pcu/error.hpp"
#include "pcu/gradcheck.hpp"
#include "pcu/gradient_suite.hpp"
#include "pcu/inference.hpp"
#include "pcu/io.hpp"
#include "pcu/losses.hpp"
#include "pcu/metrics.hpp"
#include "pcu/network.hpp"
#include "pcu/patches.hpp"
#include "pcu/point_cloud.hpp"
#include "pcu/random.hpp"
#include "pcu/sampling.hpp"
#include "pcu/shapes.hpp"
#include "pcu/spatial.hpp"
#include "pcu/trainer.hpp"
