#pragma once

#include "mrd/embedding.hpp"
#include "mrd/encoder.hpp"
#include "mrd/errors.hpp"
#include "mrd/eval.hpp"
#include "mrd/grad_check.hpp"
#include "mrd/io.hpp"
#include "mrd/losses.hpp"
#include "mrd/matrix.hpp"
#include "mrd/relations.hpp"
#include "mrd/rng.hpp"
#include "mrd/synth.hpp"
#include "mrd/trainer.hpp"
