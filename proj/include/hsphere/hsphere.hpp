#pragma once

#include "hsphere/common.hpp"
#include "hsphere/data.hpp"
#include "hsphere/hier_layer.hpp"
#include "hsphere/hierarchy.hpp"
#include "hsphere/io.hpp"
#include "hsphere/model.hpp"
#include "hsphere/sphere.hpp"
#include "hsphere/training.hpp"
