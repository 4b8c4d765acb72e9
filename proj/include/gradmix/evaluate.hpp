#pragma once

#include <string>
#include <vector>

#include "gradmix/config.hpp"
#include "gradmix/data.hpp"
#include "gradmix/report.hpp"

namespace gradmix {

/// Eval-mode embeddings (L2-normalized rows), batched.
Tensor embed_images(Encoder& enc, const Tensor& images, int batch_size);

/// Eval-mode classifier logits; requires a classifier head.
Tensor logits_images(Encoder& enc, const Tensor& images, int batch_size);

/// Open-set / out-of-distribution detection: builds the scorer from the
/// known training set, scores both test sets, reports AUROC, TNR@TPR95,
/// DTACC, AUIN, AUOUT. scorer is one of knn, msp, entropy, mahalanobis.
Report eval_detection(Encoder& enc, const OpenSetSplit& split, const std::string& scorer, int k,
                      int batch_size);

/// Classification accuracy under every (type, severity) corruption cell,
/// with the drop aggregates. Contrastive checkpoints classify via the kNN
/// label rule; checkpoints with a classifier head use argmax logits.
Report eval_corruption(Encoder& enc, const ImageDataset& train_known,
                       const ImageDataset& clean_test, int k, int batch_size, std::uint32_t seed);

/// Frozen-encoder linear probe on pooled features; top-1 (and top-5 when
/// the label space allows) on a seeded held-out split.
Report linear_probe(Encoder& enc, const ImageDataset& ds, int epochs, double lr,
                    std::uint32_t seed, int batch_size, double holdout_fraction = 0.2);

/// Per-layer and aggregated saliency maps for each image, written as float
/// grids and grayscale images, with the activated-area fraction S_M over a
/// threshold sweep recorded in the report.
Report export_attribution(Encoder& enc, const RunConfig& cfg, const Tensor& images,
                          const std::vector<int>& labels, const std::string& out_dir);

}  // namespace gradmix
