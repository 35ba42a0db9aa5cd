from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.middleware.gzip import GZipMiddleware

from billing import bill_base_case, compute_bill, component_shares, equity_delta
from config import get_settings
from error_handler import ErrorContext, ErrorHandler
from exceptions import TariffSimError
from logging_config import setup_logging
from models import BillRequest, RedistributionRequest, SolveRequest, parse_group_label
from money import format_dkk, format_fraction, format_percent, kwh_to_wh, to_fraction
from redistribution import RedistributionPolicy, redistribution_transfer, subscription_vector
from tariff import TariffRates, calibrate_tou, solve_scenario

logger = setup_logging(__name__)
settings = get_settings()

API_VERSION = "1.0.0"

app = FastAPI(
    title="Grid Tariff Simulator API",
    description="Revenue-neutral two-part grid tariffs, redistribution and household bills",
    version=API_VERSION,
    docs_url=None if settings.is_production else "/docs",
    redoc_url=None if settings.is_production else "/redoc",
)

app.add_middleware(GZipMiddleware, minimum_size=1000)
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.cors_origins_list,
    allow_credentials=False,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["Content-Type"],
)


def _solve(request: SolveRequest) -> TariffRates:
    inputs = request.to_inputs()
    scenario = request.to_scenario()
    calibration = calibrate_tou(inputs, scenario.recovery_factor, kwh_to_wh(request.q_peak_kwh),
                                kwh_to_wh(request.q_base_kwh), scenario.calibration_mode)
    return solve_scenario(inputs, scenario, calibration)


def _rates_body(rates: TariffRates) -> dict:
    return {
        "scenario": rates.scenario_id,
        "volumetric_share": format_fraction(rates.volumetric_share),
        "fee_dkk": format_dkk(rates.fee_quanta),
        "offpeak_ore_per_kwh": format_fraction(rates.gt_base_eff),
        "peak_ore_per_kwh": format_fraction(rates.gt_peak_eff),
        "base_offpeak_ore_per_kwh": format_fraction(rates.calibration.gt_base),
        "base_peak_ore_per_kwh": format_fraction(rates.calibration.gt_peak),
        "peak_ratio": format_fraction(rates.calibration.peak_ratio, 3),
    }


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    return {
        "status": "healthy",
        "environment": settings.environment,
        "version": API_VERSION,
    }


@app.get("/")
async def root():
    """Root endpoint with API information."""
    return {
        "message": "Grid Tariff Simulator API",
        "version": API_VERSION,
        "docs": app.docs_url,
        "health": "/health",
    }


@app.post("/solve")
async def solve(request: SolveRequest):
    """Calibrate the ToU blocks on the given energies and solve one scenario."""
    with ErrorContext("solve", {"scenario": request.scenario.id}):
        return _rates_body(_solve(request))


@app.post("/bill")
async def bill(request: BillRequest):
    """One household's bill under a scenario and factor, with its base-case comparison."""
    with ErrorContext("bill", {"scenario": request.scenario.id, "group": request.group}):
        rates = _solve(request)
        group = parse_group_label(request.group)
        census = request.groups()
        if group not in census:
            census[group] = 0
        multipliers = subscription_vector(RedistributionPolicy(to_fraction(request.factor)), census)

        q_peak = kwh_to_wh(request.household_peak_kwh)
        q_base = kwh_to_wh(request.household_base_kwh)
        breakdown = compute_bill(q_peak, q_base, rates, multipliers.for_group(group))
        base = bill_base_case(q_peak + q_base, request.to_inputs())
        shares = component_shares(breakdown)

        body = {
            "rates": _rates_body(rates),
            "multiplier": format_fraction(multipliers.for_group(group)),
            "subscription_dkk": format_dkk(breakdown.subscription),
            "offpeak_dkk": format_dkk(breakdown.offpeak),
            "peak_dkk": format_dkk(breakdown.peak),
            "total_dkk": format_dkk(breakdown.total),
            "base_total_dkk": format_dkk(base.total),
            "shares_pct": [format_percent(s) for s in shares],
        }
        if base.total > 0:
            body["delta_pct"] = format_percent(equity_delta(breakdown, base).delta)
        return body


@app.post("/redistribution")
async def redistribution(request: RedistributionRequest):
    """Subscription multipliers and the per-household transfer for a factor."""
    with ErrorContext("redistribution", {"factor": str(request.factor)}):
        multipliers = subscription_vector(RedistributionPolicy(to_fraction(request.factor)), request.groups())
        transfer = redistribution_transfer(request.fee_dkk, multipliers)
        return {
            "factor": format_fraction(multipliers.factor),
            "x_incr": format_fraction(multipliers.x_incr),
            "n_low": multipliers.n_low,
            "n_other": multipliers.n_other,
            "multipliers": {g.label: format_fraction(m) for g, m in multipliers.multipliers.items()},
            "avoided_dkk": format_fraction(transfer.avoided, 2),
            "surcharge_dkk": format_fraction(transfer.surcharge, 2),
            "ratio": format_fraction(transfer.ratio, 3),
        }


@app.exception_handler(TariffSimError)
async def tariffsim_error_handler(request: Request, exc: TariffSimError):
    return ErrorHandler.handle_error_response(exc, {"path": request.url.path})


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    return ErrorHandler.handle_error_response(exc, {"path": request.url.path})


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
