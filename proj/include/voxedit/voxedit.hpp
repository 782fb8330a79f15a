#pragma once

#include "voxedit/edit_region.hpp"
#include "voxedit/error.hpp"
#include "voxedit/flow.hpp"
#include "voxedit/geometry.hpp"
#include "voxedit/grid_io.hpp"
#include "voxedit/guidance.hpp"
#include "voxedit/hash.hpp"
#include "voxedit/inpaint.hpp"
#include "voxedit/mlp_field.hpp"
#include "voxedit/pipeline.hpp"
#include "voxedit/synthetic.hpp"
#include "voxedit/voxel.hpp"
