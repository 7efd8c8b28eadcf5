import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), 'tools'))

from fastmcp import FastMCP
from ablation_runner import run_ablation_study
from cost_report import model_info
from dataset_builder import generate_data
from gradient_auditor import run_gradient_audit
from trainer import run_cross_validation, run_evaluation, run_training

mcp = FastMCP(name="fusion_unet_tools")

@mcp.tool()
def generate_data_tool(config_path: str = "", out_dir: str = "data/synthetic", count: int = 0, seed: int = -1) -> str:
    """
    Generates a synthetic histology-style segmentation dataset (images, masks
    and a checksummed manifest) from the data section of a run config.
    Empty config_path uses defaults; count 0 uses n_train + n_val + n_test; seed -1 keeps the config seed.
    """
    return generate_data(config_path or None, out_dir, count or None, None if seed < 0 else seed)

@mcp.tool()
def train_tool(config_path: str = "", out_dir: str = "runs/train", seed: int = -1) -> str:
    """
    Trains FusionU-Net from a run config, keeps the best-validation checkpoint,
    and returns per-epoch loss, validation Dice/IoU and final test scores.
    """
    return run_training(config_path or None, out_dir, None if seed < 0 else seed)

@mcp.tool()
def evaluate_tool(checkpoint_path: str, config_path: str = "", seed: int = -1) -> str:
    """
    Scores a saved checkpoint on held-out data and returns mean Dice, IoU and per-label Dice.
    """
    return run_evaluation(checkpoint_path, config_path or None, None if seed < 0 else seed)

@mcp.tool()
def ablation_tool(config_path: str = "", out_dir: str = "runs/ablation", seed: int = -1) -> str:
    """
    Trains each fusion arm (none, down only, up only, both) and each resampling arm
    (pooling + conv, reorganize + group conv) over several seeds on the same data,
    and returns a table of mean ± std Dice and IoU per arm.
    """
    return run_ablation_study(config_path or None, out_dir, None if seed < 0 else seed)

@mcp.tool()
def cross_validation_tool(config_path: str = "", folds: int = 5, repeats: int = 1, seed: int = -1) -> str:
    """
    Runs repeated k-fold cross-validation and returns per-fold and mean ± std Dice/IoU.
    """
    return run_cross_validation(config_path or None, folds, repeats, None, None if seed < 0 else seed)

@mcp.tool()
def gradient_audit_tool(seed: int = 0) -> str:
    """
    Checks every differentiable operation, every composite block and a small full
    model against central finite differences in double precision, and verifies that
    no operation with a backward rule is left unchecked.
    """
    return run_gradient_audit(seed)

@mcp.tool()
def model_info_tool(config_path: str = "", preset: str = "paper", time_forward: bool = False) -> str:
    """
    Reports parameter, MAC and FLOP counts for a model config, compares them with the
    reference band, and contrasts the two resampling variants.
    """
    return model_info(config_path or None, preset, time_forward)

if __name__ == "__main__":
    mcp.run()
