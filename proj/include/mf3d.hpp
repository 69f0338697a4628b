#pragma once

#include "mf3d/augment.hpp"
#include "mf3d/checkpoint.hpp"
#include "mf3d/config.hpp"
#include "mf3d/decoder.hpp"
#include "mf3d/encoder.hpp"
#include "mf3d/error.hpp"
#include "mf3d/features.hpp"
#include "mf3d/geometry.hpp"
#include "mf3d/gradcheck.hpp"
#include "mf3d/io.hpp"
#include "mf3d/kdtree.hpp"
#include "mf3d/loss.hpp"
#include "mf3d/model.hpp"
#include "mf3d/optim.hpp"
#include "mf3d/patch_masking.hpp"
#include "mf3d/pointcloud.hpp"
#include "mf3d/prepare.hpp"
#include "mf3d/primitives.hpp"
#include "mf3d/tensor.hpp"
#include "mf3d/trainer.hpp"
