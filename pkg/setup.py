from setuptools import setup, find_packages

setup(
    name='ha-sim',
    version='0.1.0',
    packages=find_packages(exclude=['tests']),
    package_data={
        'ha_sim': ['presets/*.yaml', 'scenarios/*.yaml'],
    },
    python_requires='>=3.9',
    install_requires=[
        'click',
        'numpy',
        'PyYAML',
        'simpy',
    ],
    entry_points='''
        [console_scripts]
        ha-sim=ha_sim.__main__:cli
    '''
)
