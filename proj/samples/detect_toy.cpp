// Detect the retrieval head of the built-in copy circuit and show that
// masking it breaks needle retrieval.

#include <iostream>

#include "rhead/rhead.hpp"

int main() {
  using namespace rhead;
  const ToyConfig cfg;
  auto pool = RunnerPool::single(std::make_unique<ToyRunner>(cfg));
  const auto grid = toy_grid(cfg);
  const auto corpus = toy_corpus(cfg);

  const auto report = run_detection(pool, grid, corpus);
  for (const auto& h : report.detected) {
    std::cout << "retrieval head " << h.str() << " score " << report.matrix.score(h) << "\n";
  }

  const auto sweep = run_mask_sweep(pool, report.matrix, {0, 1}, grid, corpus);
  for (const auto& cell : sweep.cells) {
    std::cout << "K=" << cell.k << " " << cell.arm << " recall " << cell.mean_recall() << "\n";
  }
}
