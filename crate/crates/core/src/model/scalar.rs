use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::Timestamp;

/// Type tag of a [`Scalar`], also used as the `type` field in every encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarType {
    Int,
    Float,
    Bool,
    Str,
    Time,
    IntList,
    FloatList,
    BoolList,
    StrList,
    TimeList,
}

impl ScalarType {
    pub const ALL: [ScalarType; 10] = [
        ScalarType::Int,
        ScalarType::Float,
        ScalarType::Bool,
        ScalarType::Str,
        ScalarType::Time,
        ScalarType::IntList,
        ScalarType::FloatList,
        ScalarType::BoolList,
        ScalarType::StrList,
        ScalarType::TimeList,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScalarType::Int => "int",
            ScalarType::Float => "float",
            ScalarType::Bool => "bool",
            ScalarType::Str => "str",
            ScalarType::Time => "time",
            ScalarType::IntList => "int[]",
            ScalarType::FloatList => "float[]",
            ScalarType::BoolList => "bool[]",
            ScalarType::StrList => "str[]",
            ScalarType::TimeList => "time[]",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Homogeneous list value; the element type is carried by the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarList {
    Int(Vec<i64>),
    Float(Vec<f64>),
    Bool(Vec<bool>),
    Str(Vec<String>),
    Time(Vec<Timestamp>),
}

/// A typed IS attribute value.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Time(Timestamp),
    List(ScalarList),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScalarError {
    #[error("unknown value type {0:?}")]
    UnknownType(String),
    #[error("value does not match declared type {0}")]
    WrongShape(ScalarType),
    #[error("float value must be finite")]
    NonFinite,
}

fn finite(x: f64) -> Result<f64, ScalarError> {
    if x.is_finite() {
        // -0.0 and 0.0 compare equal; keep one representation so every
        // backend stores the same bits.
        Ok(if x == 0.0 { 0.0 } else { x })
    } else {
        Err(ScalarError::NonFinite)
    }
}

impl Scalar {
    /// Builds a float, rejecting NaN and infinities.
    pub fn float(x: f64) -> Result<Self, ScalarError> {
        finite(x).map(Scalar::Float)
    }

    pub fn scalar_type(&self) -> ScalarType {
        match self {
            Scalar::Int(_) => ScalarType::Int,
            Scalar::Float(_) => ScalarType::Float,
            Scalar::Bool(_) => ScalarType::Bool,
            Scalar::Str(_) => ScalarType::Str,
            Scalar::Time(_) => ScalarType::Time,
            Scalar::List(ScalarList::Int(_)) => ScalarType::IntList,
            Scalar::List(ScalarList::Float(_)) => ScalarType::FloatList,
            Scalar::List(ScalarList::Bool(_)) => ScalarType::BoolList,
            Scalar::List(ScalarList::Str(_)) => ScalarType::StrList,
            Scalar::List(ScalarList::Time(_)) => ScalarType::TimeList,
        }
    }

    /// JSON form of the value alone (without the type tag).
    pub fn value_json(&self) -> Value {
        fn time(t: &Timestamp) -> Value {
            Value::String(t.to_string())
        }
        match self {
            Scalar::Int(i) => Value::from(*i),
            Scalar::Float(x) => Value::from(*x),
            Scalar::Bool(b) => Value::Bool(*b),
            Scalar::Str(s) => Value::String(s.clone()),
            Scalar::Time(t) => time(t),
            Scalar::List(ScalarList::Int(v)) => Value::from(v.clone()),
            Scalar::List(ScalarList::Float(v)) => Value::from(v.clone()),
            Scalar::List(ScalarList::Bool(v)) => Value::from(v.clone()),
            Scalar::List(ScalarList::Str(v)) => Value::from(v.clone()),
            Scalar::List(ScalarList::Time(v)) => Value::Array(v.iter().map(time).collect()),
        }
    }

    pub fn from_value_json(ty: ScalarType, value: &Value) -> Result<Self, ScalarError> {
        let wrong = || ScalarError::WrongShape(ty);
        fn elems<T>(
            value: &Value,
            f: impl Fn(&Value) -> Option<T>,
        ) -> Option<Vec<T>> {
            value.as_array()?.iter().map(f).collect()
        }
        let time = |v: &Value| v.as_str().and_then(|s| s.parse::<Timestamp>().ok());
        Ok(match ty {
            ScalarType::Int => Scalar::Int(value.as_i64().ok_or_else(wrong)?),
            ScalarType::Float => {
                let x = value.as_f64().filter(|_| value.is_number()).ok_or_else(wrong)?;
                Scalar::Float(finite(x)?)
            }
            ScalarType::Bool => Scalar::Bool(value.as_bool().ok_or_else(wrong)?),
            ScalarType::Str => Scalar::Str(value.as_str().ok_or_else(wrong)?.to_owned()),
            ScalarType::Time => Scalar::Time(time(value).ok_or_else(wrong)?),
            ScalarType::IntList => {
                Scalar::List(ScalarList::Int(elems(value, Value::as_i64).ok_or_else(wrong)?))
            }
            ScalarType::FloatList => {
                let xs = elems(value, Value::as_f64).ok_or_else(wrong)?;
                let xs = xs.into_iter().map(finite).collect::<Result<_, _>>()?;
                Scalar::List(ScalarList::Float(xs))
            }
            ScalarType::BoolList => {
                Scalar::List(ScalarList::Bool(elems(value, Value::as_bool).ok_or_else(wrong)?))
            }
            ScalarType::StrList => Scalar::List(ScalarList::Str(
                elems(value, |v| v.as_str().map(str::to_owned)).ok_or_else(wrong)?,
            )),
            ScalarType::TimeList => {
                Scalar::List(ScalarList::Time(elems(value, time).ok_or_else(wrong)?))
            }
        })
    }

    /// Plain-text form used inside XML element text: strings verbatim,
    /// timestamps in ISO form, everything else as compact JSON.
    pub fn to_text(&self) -> String {
        match self {
            Scalar::Str(s) => s.clone(),
            Scalar::Time(t) => t.to_string(),
            other => other.value_json().to_string(),
        }
    }

    pub fn from_text(ty: ScalarType, text: &str) -> Result<Self, ScalarError> {
        match ty {
            ScalarType::Str => Ok(Scalar::Str(text.to_owned())),
            ScalarType::Time => text
                .parse()
                .map(Scalar::Time)
                .map_err(|_| ScalarError::WrongShape(ty)),
            _ => {
                let value: Value =
                    serde_json::from_str(text).map_err(|_| ScalarError::WrongShape(ty))?;
                Scalar::from_value_json(ty, &value)
            }
        }
    }

    /// Canonical JSON text of the value, used for list equality in SQL.
    pub fn canonical_value_text(&self) -> String {
        self.value_json().to_string()
    }
}

/// One named attribute of an IS object.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribute {
    pub name: String,
    pub value: Scalar,
}

impl Attribute {
    pub fn new(name: impl Into<String>, value: Scalar) -> Self {
        Attribute {
            name: name.into(),
            value,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeRepr {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    value: Value,
}

impl Serialize for Attribute {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        AttributeRepr {
            name: self.name.clone(),
            ty: self.value.scalar_type().as_str().to_owned(),
            value: self.value.value_json(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = AttributeRepr::deserialize(deserializer)?;
        let ty = ScalarType::parse(&repr.ty)
            .ok_or_else(|| D::Error::custom(ScalarError::UnknownType(repr.ty.clone())))?;
        let value = Scalar::from_value_json(ty, &repr.value)
            .map_err(|e| D::Error::custom(format!("attribute {:?}: {e}", repr.name)))?;
        Ok(Attribute {
            name: repr.name,
            value,
        })
    }
}
