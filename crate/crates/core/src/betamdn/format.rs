//! Self-describing text format for [`NetParams`].
//!
//! ```text
//! # betamdn v1
//! input_dim 1
//! hidden 80,80
//! components 1
//! activation tanh
//! param_floor 1.0000000000000000e-4
//! init_seed 0
//! input_mean <reals>
//! input_sd <reals>
//! layer <out> <in>
//! <one row of weights per line>
//! bias <reals>
//! ```

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Layer, NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::io::{fmt_real, fmt_reals, parse_real, parse_reals};

const MAGIC: &str = "# betamdn v1";

impl NetParams {
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{MAGIC}")?;
        writeln!(out, "input_dim {}", c.input_dim)?;
        let hidden: Vec<String> = c.hidden_widths.iter().map(|w| w.to_string()).collect();
        writeln!(out, "hidden {}", hidden.join(","))?;
        writeln!(out, "components {}", c.n_components)?;
        writeln!(out, "activation {}", c.activation.name())?;
        writeln!(out, "param_floor {}", fmt_real(c.param_floor))?;
        writeln!(out, "init_seed {}", c.init_seed)?;
        writeln!(out, "input_mean {}", fmt_reals(&self.input_mean))?;
        writeln!(out, "input_sd {}", fmt_reals(&self.input_sd))?;
        for layer in &self.layers {
            let (rows, cols) = layer.weights.dim();
            writeln!(out, "layer {rows} {cols}")?;
            for row in layer.weights.rows() {
                writeln!(out, "{}", fmt_reals(&row.to_vec()))?;
            }
            writeln!(out, "bias {}", fmt_reals(&layer.bias.to_vec()))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut cursor = Cursor { lines: &lines, pos: 0 };
        if cursor.next_line()?.trim() != MAGIC {
            return Err(Error::parse(1, "missing betamdn header"));
        }
        let input_dim = cursor.keyed("input_dim")?.parse().map_err(|_| cursor.err("bad input_dim"))?;
        let hidden_field = cursor.keyed("hidden")?;
        let hidden_widths = if hidden_field.is_empty() {
            Vec::new()
        } else {
            hidden_field
                .split(',')
                .map(|w| w.trim().parse::<usize>().map_err(|_| cursor.err("bad hidden width")))
                .collect::<Result<_>>()?
        };
        let n_components = cursor.keyed("components")?.parse().map_err(|_| cursor.err("bad components"))?;
        let activation = Activation::parse(cursor.keyed("activation")?)?;
        let param_floor = parse_real(cursor.keyed("param_floor")?, cursor.pos)?;
        let init_seed = cursor.keyed("init_seed")?.parse().map_err(|_| cursor.err("bad init_seed"))?;
        let input_mean = parse_reals(cursor.keyed("input_mean")?, cursor.pos)?;
        let input_sd = parse_reals(cursor.keyed("input_sd")?, cursor.pos)?;
        let config = NetConfig {
            input_dim,
            hidden_widths,
            n_components,
            activation,
            param_floor,
            init_seed,
        };
        config.validate()?;

        let mut layers = Vec::new();
        for (l, (out_dim, in_dim)) in config.shapes().into_iter().enumerate() {
            let dims = cursor.keyed("layer")?;
            let expected = format!("{out_dim} {in_dim}");
            if dims != expected {
                return Err(cursor.err(&format!("layer {l}: expected shape {expected}, found {dims}")));
            }
            let mut weights = Array2::zeros((out_dim, in_dim));
            for r in 0..out_dim {
                let row = parse_reals(cursor.next_line()?, cursor.pos)?;
                if row.len() != in_dim {
                    return Err(cursor.err("weight row has wrong length"));
                }
                for (c, v) in row.into_iter().enumerate() {
                    weights[(r, c)] = v;
                }
            }
            let bias = parse_reals(cursor.keyed("bias")?, cursor.pos)?;
            if bias.len() != out_dim {
                return Err(cursor.err("bias has wrong length"));
            }
            layers.push(Layer {
                weights,
                bias: Array1::from(bias),
            });
        }
        if input_mean.len() != input_dim || input_sd.len() != input_dim {
            return Err(Error::parse(8, "standardization vectors do not match input_dim"));
        }
        Ok(NetParams {
            config,
            layers,
            input_mean,
            input_sd,
        })
    }
}

struct Cursor<'a> {
    lines: &'a [String],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn next_line(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .ok_or_else(|| Error::parse(self.pos + 1, "unexpected end of file"))?;
        self.pos += 1;
        Ok(line.as_str())
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next_line()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            None if line.trim() == key => Ok(""),
            _ => Err(self.err(&format!("expected {key:?}"))),
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::parse(self.pos, msg.to_string())
    }
}
