"""
Custom template filters for detector reports
"""
from django import template

register = template.Library()


@register.filter
def get_item(dictionary, key):
    """
    Get an item from a dictionary using a key
    Usage: {{ aurocs|get_item:variant }}
    """
    if dictionary is None:
        return None
    return dictionary.get(key)


@register.filter
def exact(value):
    """
    Floats as repr so reports read back bit-exactly; None as empty
    Usage: {{ fit.scale|exact }}
    """
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(float(value))
    return value
