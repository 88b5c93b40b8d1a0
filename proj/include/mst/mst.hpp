#pragma once

#include "mst/numerics.hpp"
#include "mst/multiset.hpp"
#include "mst/attention.hpp"
#include "mst/blocks.hpp"
#include "mst/model.hpp"
#include "mst/topology.hpp"
#include "mst/clustering.hpp"
#include "mst/data.hpp"
#include "mst/harness.hpp"
