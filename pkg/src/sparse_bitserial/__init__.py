"""Functional and cycle-level model of a sparse bit-serial systolic accelerator.

Pipeline: bit-sparsity quantization -> sign/position/bitmap encoding ->
tiling and dataflow choice -> systolic-array simulation -> traffic/energy.
"""

from .core import (CONV, FC, PSUM_BITS, ArchConfig, Diagnostic, FixedTensor, LayerSpec, NetworkSpec,
                   Pool, bundled_network, bundled_networks, load_arch, load_network, output_dims,
                   pooled_dims, read_weight_file, save_network, validate_network, write_weight_file)
from .dataflow import (RIF, RWF, TilePass, TilingPlan, TrafficReport, choose_dataflow,
                       coverage_counts, dram_traffic, plan_layer, schedule, tile_layer)
from .encoder import (EncodedLayer, EncodedWeight, WeightBufferImage, bits_per_weight, decode_layer,
                      decode_weight, encode_layer, encode_weight, pack_layer, read_encoded_layer,
                      unpack_layer, write_encoded_layer)
from .metrics import EnergyReport, RatioTable, compare_runs, energy_report
from .quantizer import (QuantStats, nnzb, nnzb_array, numeric_range, quantize_array,
                        quantize_tensor, quantize_weight, sweep_nnzb)
from .reference import (Psum, bitserial_mac, conv_golden, relu_pool, sparse_conv_golden,
                        sparse_mac, wrap)
from .systolic import (BufferOverflow, CycleReport, NetworkRun, PEState, WeightSlot, WorkloadMode,
                       event_column, pe_step, simulate_column, simulate_layer, simulate_network)

__version__ = "0.1.0"
