#pragma once

#include <string>
#include <string_view>

#include "xconv/graph.hpp"
#include "xconv/rng.hpp"

namespace xconv {

enum class CellVariant { kDense, kFactorized, kShuffle, kXOp };

std::string_view to_string(CellVariant v);
CellVariant parse_cell_variant(std::string_view name);
/// One-letter mnemonic used in comparison tables (D, F, S, X).
char mnemonic(CellVariant v);

/// Dimensions of a cell built around one K x K convolution.
///
/// The canonical form is the bottleneck: pw(c_in -> c_mid), K x K on c_mid, pw(c_mid -> c_out).
/// `lead_pointwise = false` drops the leading pointwise (then c_mid must equal c_in);
/// `dense_fuses_tail = true` makes the Dense variant's K x K conv produce c_out directly,
/// without the trailing pointwise (DenseNet layers, ResNet-18 convs). Non-dense variants
/// always end in a pointwise projection to c_out.
struct CellDims {
  int c_in = 0;
  int c_mid = 0;
  int c_out = 0;
  int kernel = 3;
  int stride = 1;
  bool lead_pointwise = true;
  bool dense_fuses_tail = false;
};

struct CellOptions {
  bool batchnorm = false;      // conv -> bn after every convolution
  bool random_shuffle = true;  // seeded random permutations; false = deterministic interleave
};

/// Interleaving permutation of ShuffleNet's channel shuffle with `groups` groups.
std::vector<int> interleave_permutation(int channels, int groups);
/// Uniformly random permutation drawn from prg.
std::vector<int> random_permutation(int channels, Prg& prg);

/// Appends the primitive layers of a cell after `from` and returns the cell's output layer.
/// Throws ShapeError when grouped/shuffle variants meet odd channel counts.
std::string expand_cell(GraphBuilder& b, const std::string& from, CellVariant variant, const CellDims& dims,
                        Prg& prg, const CellOptions& options = {});

/// Stand-alone graph of a single cell on a 1 x c_in x size x size input.
Graph cell_graph(CellVariant variant, const CellDims& dims, int size, std::uint64_t seed,
                 const CellOptions& options = {});

}  // namespace xconv
