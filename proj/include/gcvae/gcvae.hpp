#pragma once

#include "gcvae/autodiff.hpp"
#include "gcvae/distributions.hpp"
#include "gcvae/errors.hpp"
#include "gcvae/evalkit.hpp"
#include "gcvae/experiment.hpp"
#include "gcvae/io.hpp"
#include "gcvae/nn.hpp"
#include "gcvae/params.hpp"
#include "gcvae/rng.hpp"
#include "gcvae/special.hpp"
#include "gcvae/synth.hpp"
#include "gcvae/tensor.hpp"
#include "gcvae/trainer.hpp"
#include "gcvae/vae_net.hpp"
