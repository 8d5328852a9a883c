"""
FastAPI application for deepteam.

This API provides endpoints to:
- List the built-in presets
- Solve the deep Riccati equations of a preset or inline model
- Run a full experiment (Riccati, PG/NPG, model-free learning or simulation)
"""
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
import logging
import sys
import os

# Add parent directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from deepteam.errors import ConfigError, ModelError, NumericalError
from deepteam.models import ExperimentConfig, ExperimentResult, RiccatiRequest, RiccatiResponse
from deepteam.pipeline import run_experiment
from deepteam.policy_gradient import evaluate
from deepteam.presets import PRESETS, preset_model
from deepteam.riccati import optimal_policy, solve_team

logger = logging.getLogger(__name__)

app = FastAPI(
    title="deepteam",
    description="Deep structured linear-quadratic teams: Riccati oracle, policy gradients and model-free learning",
    version="1.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, (ConfigError, ModelError)):
        return HTTPException(status_code=422, detail=f"{type(exc).__name__}: {exc}")
    if isinstance(exc, NumericalError):
        return HTTPException(status_code=409, detail=f"{type(exc).__name__}: {exc}")
    logger.exception("unexpected failure")
    return HTTPException(status_code=500, detail=f"Experiment failed: {str(exc)}")


@app.get("/")
async def root():
    """Root endpoint with API information."""
    return {
        "service": "deepteam",
        "version": "1.0.0",
        "status": "operational",
        "endpoints": {
            "presets": "/api/presets - Built-in models and their experiment defaults",
            "riccati": "/api/riccati - Optimal team strategy of a preset or inline model",
            "experiment": "/api/experiment - Run an experiment and return its summary",
            "health": "/health - Health check endpoint"
        }
    }


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "service": "deepteam"
    }


@app.get("/api/presets")
async def list_presets():
    """Preset names with their model size, risk factor and experiment defaults."""
    out = {}
    for name, (build, defaults) in PRESETS.items():
        model = build()
        out[name] = {
            "agents": sum(sub.n for sub in model.subs),
            "risk_factor": model.risk_factor,
            "defaults": {
                key: getattr(value, "value", value) for key, value in vars(defaults).items()
            },
        }
    return out


@app.post("/api/riccati", response_model=RiccatiResponse)
def riccati_endpoint(request: RiccatiRequest):
    """
    Solve the S + 1 deep Riccati equations.

    Args:
        request: preset name or inline model, optional risk factor override

    Returns:
        RiccatiResponse with the optimal gains (u = theta x) and value matrices
    """
    try:
        model = preset_model(request.preset) if request.preset else request.model
        if request.risk_factor is not None:
            model = model.with_risk_factor(request.risk_factor)
        solution = solve_team(model)
        policy = optimal_policy(solution)
        return RiccatiResponse(
            risk_factor=model.risk_factor,
            policy=policy,
            P=solution.P,
            P_bold=solution.P_bold,
            cost=evaluate(model, policy).cost,
            iterations=solution.iterations,
            residual=solution.residual,
        )
    except Exception as e:
        raise _http_error(e)


@app.post("/api/experiment", response_model=ExperimentResult)
def experiment_endpoint(config: ExperimentConfig):
    """
    Run one experiment.

    Artifacts are written only when `out` is set in the configuration.
    A run that halts on an unstable iterate still returns 200 with
    exit_code 3 in the body.
    """
    try:
        return run_experiment(config)
    except Exception as e:
        raise _http_error(e)


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
