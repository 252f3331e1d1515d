use std::fmt;
use std::str::FromStr;

use crate::blocks::layers::Ctx;
use crate::blocks::nonbt1d::{NonBottleneck1d, NonBottleneck1dCache};
use crate::blocks::spatial::{Direction, SpatialCache, SpatialConv};
use crate::error::{Error, Result};
use crate::params::{Gradients, ModelParams, ParamBuilder};
use crate::tensor::{Real, Tensor};

/// One stage of the information-exchange block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Residual { dilation: usize },
    Spatial(Direction),
}

/// Default interleave: `d1, d2, down, up, d1, d4`.
pub const DEFAULT_LAYOUT: [Stage; 6] = [
    Stage::Residual { dilation: 1 },
    Stage::Residual { dilation: 2 },
    Stage::Spatial(Direction::Down),
    Stage::Spatial(Direction::Up),
    Stage::Residual { dilation: 1 },
    Stage::Residual { dilation: 4 },
];

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Residual { dilation } => write!(f, "d{dilation}"),
            Stage::Spatial(Direction::Down) => f.write_str("down"),
            Stage::Spatial(Direction::Up) => f.write_str("up"),
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Stage::Spatial(Direction::Down)),
            "up" => Ok(Stage::Spatial(Direction::Up)),
            _ => s
                .strip_prefix('d')
                .and_then(|d| d.parse().ok())
                .filter(|&d| d >= 1)
                .map(|dilation| Stage::Residual { dilation })
                .ok_or_else(|| Error::Config(format!("unknown exchange stage `{s}` (expected dN, down or up)"))),
        }
    }
}

/// Parses a comma-separated layout such as `d1,d2,down,up,d1,d4`.
pub fn parse_layout(s: &str) -> Result<Vec<Stage>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

#[derive(Clone, Debug)]
enum Unit {
    Residual(NonBottleneck1d),
    Spatial(SpatialConv),
}

enum UnitCache<T> {
    Residual(NonBottleneck1dCache<T>),
    Spatial(SpatialCache<T>),
}

/// Residual blocks with growing dilation interleaved with vertical spatial
/// passes, all at one channel depth.
#[derive(Clone, Debug)]
pub struct InfoExchange {
    pub channels: usize,
    pub layout: Vec<Stage>,
    units: Vec<Unit>,
}

pub struct InfoExchangeCache<T> {
    units: Vec<UnitCache<T>>,
}

impl InfoExchange {
    pub fn new<T: Real>(
        b: &mut ParamBuilder<T>,
        name: &str,
        channels: usize,
        spatial_width: usize,
        layout: &[Stage],
        dropout: f64,
    ) -> Result<Self> {
        let units = layout
            .iter()
            .enumerate()
            .map(|(i, stage)| {
                let unit_name = format!("{name}.{i}_{stage}");
                Ok(match *stage {
                    Stage::Residual { dilation } => {
                        Unit::Residual(NonBottleneck1d::new(b, &unit_name, channels, dilation, dropout)?)
                    }
                    Stage::Spatial(dir) => Unit::Spatial(SpatialConv::new(b, &unit_name, channels, spatial_width, dir)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(InfoExchange {
            channels,
            layout: layout.to_vec(),
            units,
        })
    }

    pub fn forward<T: Real>(
        &self,
        p: &ModelParams<T>,
        x: &Tensor<T>,
        ctx: &mut Ctx<T>,
    ) -> Result<(Tensor<T>, InfoExchangeCache<T>)> {
        let (_, c, _, _) = x.dims4("info_exchange_forward")?;
        if c != self.channels {
            return Err(Error::shape(
                "info_exchange_forward",
                format!("input has {c} channels, block expects {}", self.channels),
            ));
        }
        let mut caches = Vec::with_capacity(self.units.len());
        let mut cur = x.clone();
        for unit in &self.units {
            match unit {
                Unit::Residual(block) => {
                    let (y, cache) = block.forward(p, &cur, ctx)?;
                    caches.push(UnitCache::Residual(cache));
                    cur = y;
                }
                Unit::Spatial(conv) => {
                    let cache = conv.forward(p, &cur)?;
                    cur = cache.output.clone();
                    caches.push(UnitCache::Spatial(cache));
                }
            }
        }
        Ok((cur, InfoExchangeCache { units: caches }))
    }

    pub fn backward<T: Real>(
        &self,
        p: &ModelParams<T>,
        cache: &InfoExchangeCache<T>,
        dy: &Tensor<T>,
        g: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (unit, c) in self.units.iter().zip(&cache.units).rev() {
            d = match (unit, c) {
                (Unit::Residual(block), UnitCache::Residual(c)) => block.backward(p, c, &d, g)?,
                (Unit::Spatial(conv), UnitCache::Spatial(c)) => conv.backward(p, c, &d, g)?,
                _ => unreachable!("cache built by the same layout"),
            };
        }
        Ok(d)
    }
}
