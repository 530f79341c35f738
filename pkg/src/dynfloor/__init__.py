"""Dynamic floor prices for first-price display auctions."""
from .auction import (AuctionOutcome, BidderType, BidSubmission, FloorVector,
                      resolve_first_price, resolve_second_price)
from .bidmodel import (FloorLinkModel, WeibullParams, fit_bid_model,
                       fit_censored_bid_model)
from .config import PipelineConfig, load_config
from .model import FloorModelRow, emit_model_csv, parse_model_csv
from .pipeline import TrainingReport, ingest_logs, train_all
from .revenue import (Bidder, BidDistributionModel, OptimizerConfig, PlacementContext,
                      expected_bidder_revenue, expected_revenue, optimize_floors)
from .service import FloorQuery, FloorService, load_model, lookup
from .validator import ModelStore, validate_model

__version__ = "0.1.0"
