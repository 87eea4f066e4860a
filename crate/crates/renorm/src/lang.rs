//! Map definitions in the recipe mini-language:
//!
//! ```text
//! map := identity
//!      | rotation(const)          -- R_s
//!      | twist(expr_in_y)         -- (theta + nu(y), y)
//!      | fiber(expr_in_y)         -- (theta, y + d(y))
//!      | flow(u_expr, v_expr, t)  -- time-t map of the field (u, v)
//!      | compose(outer, inner)
//!      | scale(m, const)          -- x + c * displacement(m)
//!      | import("path.csv")       -- sampled map table
//! ```
//!
//! Scalar expressions follow the grammar in [`crate::expr`].

use std::sync::Arc;

use crate::error::Result;
use crate::expr::{parse_expr_tokens, Lexer, ScalarExpr};
use crate::field::{CylField, IntegratorOpts};
use crate::gridmap::parse_map_table;
use crate::mapexpr::{MapExpr, MapNode};
use crate::profile::{make_constant, make_expression};
use crate::real::Real;

/// Parse a map definition. `import` paths are resolved and read eagerly
/// relative to `base_dir` (or the working directory when `None`).
pub fn parse_map<R: Real>(src: &str, base_dir: Option<&std::path::Path>) -> Result<MapExpr<R>> {
    parse_map_at(src, base_dir, 1, 1)
}

/// Same as [`parse_map`] with an origin offset for error locations inside
/// larger documents.
pub fn parse_map_at<R: Real>(
    src: &str,
    base_dir: Option<&std::path::Path>,
    line0: usize,
    col0: usize,
) -> Result<MapExpr<R>> {
    let mut lx = Lexer::new_at(src, line0, col0)?;
    let m = parse_map_tokens(&mut lx, base_dir)?;
    if !lx.at_end() {
        return Err(lx.error("trailing input after map definition"));
    }
    Ok(m)
}

fn parse_map_tokens<R: Real>(
    lx: &mut Lexer,
    base_dir: Option<&std::path::Path>,
) -> Result<MapExpr<R>> {
    let pos = lx.position();
    let name = lx.take_ident()?;
    match name.as_str() {
        "identity" => Ok(MapExpr::identity()),
        "rotation" => {
            lx.eat_lparen()?;
            let e: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            let sigma = e.const_value().ok_or_else(|| lx.error("rotation needs a constant"))?;
            Ok(MapExpr::rotation(sigma))
        }
        "twist" => {
            lx.eat_lparen()?;
            let e: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            Ok(MapExpr::twist(make_expression(e)))
        }
        "fiber" => {
            lx.eat_lparen()?;
            let e: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            Ok(MapExpr::fiber_map(make_expression(e)))
        }
        "flow" => {
            lx.eat_lparen()?;
            let u: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_comma()?;
            let v: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_comma()?;
            let t: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            let t = t.const_value().ok_or_else(|| lx.error("flow time must be constant"))?;
            let field = CylField::from_exprs(u, v);
            Ok(MapExpr::flow_map(field, t, IntegratorOpts::default()))
        }
        "compose" => {
            lx.eat_lparen()?;
            let outer = parse_map_tokens(lx, base_dir)?;
            lx.eat_comma()?;
            let inner = parse_map_tokens(lx, base_dir)?;
            lx.eat_rparen()?;
            Ok(MapExpr::compose(outer, inner))
        }
        "scale" => {
            lx.eat_lparen()?;
            let inner = parse_map_tokens(lx, base_dir)?;
            lx.eat_comma()?;
            let c: ScalarExpr<R> = parse_expr_tokens(lx)?;
            lx.eat_rparen()?;
            let c = c.const_value().ok_or_else(|| lx.error("scale needs a constant"))?;
            Ok(MapExpr::scaled_displacement(inner, make_constant(c)))
        }
        "import" => {
            lx.eat_lparen()?;
            let raw = lx.take_string()?;
            lx.eat_rparen()?;
            let path = match base_dir {
                Some(d) => d.join(&raw),
                None => std::path::PathBuf::from(&raw),
            };
            let text = std::fs::read_to_string(&path).map_err(|e| {
                lx.error(format!("cannot read `{}`: {e}", path.display()))
            })?;
            let data = parse_map_table::<R>(&text)?;
            Ok(MapExpr::grid_import(Arc::new(data)))
        }
        other => Err(lx.error_at(pos, format!("unknown map constructor `{other}`"))),
    }
}

/// Print a map in the grammar when it is representable (the constructors the
/// grammar can spell); returns `None` for internal construction nodes.
pub fn print_map<R: Real>(m: &MapExpr<R>) -> Option<String> {
    match m.node() {
        MapNode::Identity => Some("identity".into()),
        MapNode::Rotation { sigma } => Some(format!("rotation({sigma})")),
        MapNode::Twist { nu } => profile_expr_src(nu).map(|e| format!("twist({e})")),
        MapNode::FiberMap { displacement } => {
            profile_expr_src(displacement).map(|e| format!("fiber({e})"))
        }
        MapNode::Compose { outer, inner } => {
            Some(format!("compose({}, {})", print_map(outer)?, print_map(inner)?))
        }
        _ => None,
    }
}

fn profile_expr_src<R: Real>(p: &crate::profile::ScalarProfile<R>) -> Option<String> {
    p.expression_source()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::CylPoint;

    #[test]
    fn parses_map_constructors() {
        let m: MapExpr<f64> = parse_map("rotation(0.125)", None).unwrap();
        let q = m.evaluate(CylPoint::new(0.95, 0.3)).unwrap();
        assert!((q.theta.reduced() - 0.075).abs() < 1e-15);

        let m: MapExpr<f64> =
            parse_map("compose(twist(0.2*bump(y, 0.5, 0.5, 1)), fiber(0.1*bump(y, 0.5, 0.4, 1)))", None)
                .unwrap();
        let q = m.evaluate(CylPoint::new(0.3, 0.5)).unwrap();
        assert!(q.y > 0.5); // fiber pushes up at the bump center
    }

    #[test]
    fn parse_errors_located() {
        let err = parse_map::<f64>("twist(0.2*", None).unwrap_err();
        assert!(matches!(err, crate::error::Error::Parse { .. }));
        let err = parse_map::<f64>("frobnicate(1)", None).unwrap_err();
        assert!(err.to_string().contains("unknown map constructor"));
    }

    #[test]
    fn map_print_parse_roundtrip() {
        for src in [
            "rotation(0.125)",
            "twist(0.2 * bump(y, 0.5, 0.5, 1))",
            "fiber(0.1 * bump(y, 0.5, 0.4, 1))",
            "compose(twist(0.2 * bump(y, 0.5, 0.5, 1)), fiber(0.1 * bump(y, 0.5, 0.4, 1)))",
        ] {
            let m: MapExpr<f64> = parse_map(src, None).unwrap();
            let printed = print_map(&m).unwrap();
            let re: MapExpr<f64> = parse_map(&printed, None).unwrap();
            assert_eq!(printed, print_map(&re).unwrap());
            for i in 0..10 {
                let p = CylPoint::new(0.1 * i as f64, (0.07 * i as f64) % 1.0);
                let a = m.evaluate(p).unwrap();
                let b = re.evaluate(p).unwrap();
                assert!(a.dist(b) < 1e-14);
            }
        }
    }
}
