pub mod gateway;
pub mod harness;
pub mod metocean;
pub mod raster;
pub mod telemetry;
pub mod tiles;
