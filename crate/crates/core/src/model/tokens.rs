use crate::autodiff::Var;
use crate::error::{Error, Result};

/// `(B, N, D)` activations; token 0 may be a class token.
#[derive(Debug, Clone, Copy)]
pub struct TokenSequence<'t> {
    pub data: Var<'t>,
    pub class_token: bool,
}

impl<'t> TokenSequence<'t> {
    pub fn spatial(data: Var<'t>) -> Self {
        Self {
            data,
            class_token: false,
        }
    }

    pub fn with_class_token(data: Var<'t>) -> Result<Self> {
        let shape = data.shape();
        if shape.len() != 3 || shape[1] < 2 {
            return Err(Error::shape("token sequence", &shape, "class token needs at least two tokens"));
        }
        Ok(Self {
            data,
            class_token: true,
        })
    }

    pub fn batch(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn tokens(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    /// Removes token 0, returning it as `(B, D)` alongside the spatial tokens.
    pub fn split_class_token(self) -> Result<(Var<'t>, TokenSequence<'t>)> {
        if !self.class_token {
            return Err(Error::Usage("sequence carries no class token".into()));
        }
        let (b, n, d) = (self.batch(), self.tokens(), self.dim());
        let cls = self.data.slice(1, 0, 1)?.reshape(&[b, d])?;
        Ok((cls, TokenSequence::spatial(self.data.slice(1, 1, n)?)))
    }

    /// Side of the square token grid.
    pub fn grid_side(&self) -> Result<usize> {
        if self.class_token {
            return Err(Error::Usage("class token must be removed before spatial reshaping".into()));
        }
        let n = self.tokens();
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::shape("token grid", &self.data.shape(), "token count is not a perfect square"));
        }
        Ok(side)
    }

    /// `(B, N, D) → (B, D, g, g)`
    pub fn to_feature_map(self) -> Result<Var<'t>> {
        let g = self.grid_side()?;
        let (b, d) = (self.batch(), self.dim());
        self.data.transpose(1, 2)?.reshape(&[b, d, g, g])
    }

    /// Rows `start..end` of the batch.
    pub fn rows(self, start: usize, end: usize) -> Result<Self> {
        Ok(Self {
            data: self.data.slice(0, start, end)?,
            class_token: self.class_token,
        })
    }
}

/// `(B, C, H, W) → (B, H·W, C)`
pub fn feature_map_to_tokens(x: Var<'_>) -> Result<TokenSequence<'_>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("tokens", &s, "expected (B, C, H, W)"));
    }
    Ok(TokenSequence::spatial(x.reshape(&[s[0], s[1], s[2] * s[3]])?.transpose(1, 2)?))
}
