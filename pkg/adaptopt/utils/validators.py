"""
Validation helpers for key-value run configurations.

Every validator returns ``(is_valid, errors)`` where ``errors`` is a list of
messages prefixed with the offending key path, e.g. ``adapt.c_r: must not
exceed 1.0``.
"""

TRUE_VALUES = {'1', 'true', 'yes', 'on'}
FALSE_VALUES = {'0', 'false', 'no', 'off'}


def coerce_value(value, expected_type):
    """
    Convert a raw config value to the expected type
    Raises ValueError / TypeError when the value does not fit
    """
    if expected_type == 'int':
        if isinstance(value, bool):
            raise TypeError('bool is not an integer')
        as_float = float(value)
        if not as_float.is_integer():
            raise ValueError(f'{value!r} is not an integer')
        return int(as_float)

    if expected_type == 'float':
        if isinstance(value, bool):
            raise TypeError('bool is not a number')
        return float(value)

    if expected_type == 'bool':
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in TRUE_VALUES:
            return True
        if text in FALSE_VALUES:
            return False
        raise ValueError(f'{value!r} is not a boolean')

    if expected_type == 'string':
        if value is None:
            raise TypeError('missing value')
        return str(value).strip()

    raise ValueError(f'unknown type {expected_type}')


def validate_required_fields(data, required_fields):
    """
    Validate that all required keys are present and not empty
    Returns (is_valid, errors)
    """
    errors = []

    for field in required_fields:
        if field not in data:
            errors.append(f"{field}: required key is missing")
        elif data[field] is None or (isinstance(data[field], str) and not data[field].strip()):
            errors.append(f"{field}: required key is empty")

    return len(errors) == 0, errors


def validate_known_fields(data, allowed_fields):
    """Reject keys that are not part of the schema"""
    errors = [f"{field}: unknown key" for field in data if field not in allowed_fields]
    return len(errors) == 0, errors


def validate_data_types(data, field_types):
    """
    Validate data types for specific fields

    Args:
        data: Dictionary of data to validate
        field_types: Dictionary of field_name -> expected_type mappings
                     ('int', 'float', 'bool', 'string')

    Returns:
        (is_valid, errors)
    """
    errors = []

    for field_name, expected_type in field_types.items():
        if field_name in data and data[field_name] is not None:
            try:
                coerce_value(data[field_name], expected_type)
            except (ValueError, TypeError):
                if expected_type == 'int':
                    errors.append(f"{field_name}: must be an integer")
                elif expected_type == 'float':
                    errors.append(f"{field_name}: must be a number")
                elif expected_type == 'bool':
                    errors.append(f"{field_name}: must be true or false")
                else:
                    errors.append(f"{field_name}: must be a string")

    return len(errors) == 0, errors


def validate_choices(data, field_choices):
    """Validate enumerated fields (case-insensitive)"""
    errors = []

    for field_name, choices in field_choices.items():
        if field_name in data and data[field_name] is not None:
            value = str(data[field_name]).strip()
            if value.lower() not in {str(c).lower() for c in choices}:
                errors.append(f"{field_name}: must be one of {', '.join(str(c) for c in choices)}")

    return len(errors) == 0, errors


def validate_numeric_ranges(data, field_ranges):
    """
    Validate numeric field ranges

    Args:
        data: Dictionary of data to validate
        field_ranges: Dictionary of field_name -> (min_value, max_value) tuples;
                      None leaves that side open, a min given as ('>', v)
                      is exclusive

    Returns:
        (is_valid, errors)
    """
    errors = []

    for field_name, (min_value, max_value) in field_ranges.items():
        if field_name in data and data[field_name] is not None:
            try:
                value = float(data[field_name])
            except (ValueError, TypeError):
                errors.append(f"{field_name}: must be a valid number")
                continue

            if isinstance(min_value, tuple):
                _, bound = min_value
                if value <= bound:
                    errors.append(f"{field_name}: must be greater than {bound}")
            elif min_value is not None and value < min_value:
                errors.append(f"{field_name}: must be at least {min_value}")

            if max_value is not None and value > max_value:
                errors.append(f"{field_name}: must not exceed {max_value}")

    return len(errors) == 0, errors


def comprehensive_input_validation(data, validation_rules):
    """
    Comprehensive input validation using multiple validation rules

    Args:
        data: Dictionary of data to validate
        validation_rules: Dictionary containing validation rules:
            {
                'required_fields': ['problem.preset'],
                'allowed_fields': [...],
                'field_types': {'mesh.base_nx': 'int'},
                'field_choices': {'adapt.criterion': ['CNF', 'DENS']},
                'numeric_ranges': {'adapt.c_r': (0.0, 1.0)},
                'custom_validators': [callable(data) -> (is_valid, error_msg)]
            }

    Returns:
        (is_valid, errors)
    """
    all_errors = []

    if 'required_fields' in validation_rules:
        is_valid, errors = validate_required_fields(data, validation_rules['required_fields'])
        if not is_valid:
            all_errors.extend(errors)

    if 'allowed_fields' in validation_rules:
        is_valid, errors = validate_known_fields(data, validation_rules['allowed_fields'])
        if not is_valid:
            all_errors.extend(errors)

    if 'field_types' in validation_rules:
        is_valid, errors = validate_data_types(data, validation_rules['field_types'])
        if not is_valid:
            all_errors.extend(errors)

    if 'field_choices' in validation_rules:
        is_valid, errors = validate_choices(data, validation_rules['field_choices'])
        if not is_valid:
            all_errors.extend(errors)

    # Ranges only make sense once types are right
    if 'numeric_ranges' in validation_rules and not all_errors:
        is_valid, errors = validate_numeric_ranges(data, validation_rules['numeric_ranges'])
        if not is_valid:
            all_errors.extend(errors)

    if 'custom_validators' in validation_rules and not all_errors:
        for validator_func in validation_rules['custom_validators']:
            is_valid, error_msg = validator_func(data)
            if not is_valid:
                all_errors.append(error_msg)

    return len(all_errors) == 0, all_errors
